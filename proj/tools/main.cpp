#include "occfit/cli.hpp"

int main(int argc, char** argv) { return occ::run_cli(argc, argv); }
