#include "dmplug/cli.hpp"

int main(int argc, char** argv) { return dmplug::cli(argc, argv); }
