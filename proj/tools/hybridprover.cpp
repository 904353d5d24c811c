#include "hybridprover/cli.hpp"

int main(int argc, char** argv) { return hybridprover::cli::run(argc, argv); }
