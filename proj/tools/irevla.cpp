#include "irevla/cli/commands.hpp"

int main(int argc, char** argv) { return irevla::cli::dispatch(argc, argv); }
