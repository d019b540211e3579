#include "cli.hpp"

int main(int argc, char** argv) { return fetwfe::cli::run(argc, argv); }
