#include "cdl/cli.hpp"

int main(int argc, char** argv) { return cdl::cli::run_cli(argc, argv); }
