#include "clusterscape/cli.hpp"

int main(int argc, char** argv) { return clusterscape::cli::run(argc, argv); }
