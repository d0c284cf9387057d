#include "caries_cli/cli.hpp"

int main(int argc, char** argv) { return caries::cli::run({argv, argv + argc}); }
