#include "m2mrf/cli.hpp"

int main(int argc, char** argv) { return m2mrf::run_cli(argc, argv); }
