#include "skelreid/cli.hpp"

int main(int argc, char** argv) { return skelreid::cli::run(argc, argv); }
