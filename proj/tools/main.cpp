#include "commands.hpp"

int main(int argc, char** argv) { return fednerf::cli::run(argc, argv); }
