#include "cli.hpp"

int main(int argc, char** argv) { return sparseflow::cli::run(argc, argv); }
