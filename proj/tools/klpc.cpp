#include "klpc/cli/commands.hpp"

int main(int argc, char** argv) { return klpc::cli::run(argc, argv); }
