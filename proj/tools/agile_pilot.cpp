#include "agile_pilot/cli.hpp"

int main(int argc, char** argv) { return agile::run_cli(argc, argv); }
