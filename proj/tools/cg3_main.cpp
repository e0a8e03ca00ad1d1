#include "cg3/cli.hpp"

int main(int argc, char** argv) { return cg3::cli::run(argc, argv); }
