#include "fedchain/cli.hpp"

int main(int argc, char** argv) { return fedchain::cli::run_cli(argc, argv); }
