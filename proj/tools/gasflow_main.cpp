#include "gasflow/cli_io.hpp"

int main(int argc, char** argv) { return gasflow::run_cli(argc, argv); }
