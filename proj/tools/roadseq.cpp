#include "roadseq/cli.hpp"

int main(int argc, char** argv) { return roadseq::cli::run_cli(argc, argv); }
