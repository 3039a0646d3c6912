#include "eigavg/cli.hpp"

int main(int argc, char** argv) { return eigavg::cli_main(argc, argv); }
