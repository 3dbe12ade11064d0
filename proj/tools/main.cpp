#include "orbitmix/cli.hpp"

int main(int argc, char** argv) { return orbitmix::run_cli(argc, argv); }
