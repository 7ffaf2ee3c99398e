#include "abacus/cli.hpp"

int main(int argc, char** argv) { return abacus::cli_main(argc, argv); }
