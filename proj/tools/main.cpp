#include "xal/cli.hpp"

int main(int argc, char** argv) { return xal::cli_main(argc, argv); }
