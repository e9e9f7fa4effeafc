#include "cisper/cli.hpp"

int main(int argc, char** argv) { return cisper::run_cli(argc, argv); }
