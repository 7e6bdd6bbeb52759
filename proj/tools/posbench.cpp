#include "posbench/cli.hpp"

int main(int argc, char** argv) { return posbench::cli::run(argc, argv); }
