#include "belieflab/cli.hpp"

int main(int argc, char** argv) { return belieflab::cli::run(argc, argv); }
