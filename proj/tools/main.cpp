#include "commands.hpp"

int main(int argc, char** argv) { return infocons::cli::run(argc, argv); }
