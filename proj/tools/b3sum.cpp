#include "b3s/cli.hpp"

int main(int argc, char** argv) { return b3s::cli::run(argc, argv); }
