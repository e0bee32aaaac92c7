#include "confgap/cli.hpp"

int main(int argc, char **argv) { return confgap::cli::run(argc, argv); }
