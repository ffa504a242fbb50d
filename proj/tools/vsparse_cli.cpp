#include "vsparse/cli.hpp"

int main(int argc, char** argv) { return vsparse::run_cli(argc, argv); }
