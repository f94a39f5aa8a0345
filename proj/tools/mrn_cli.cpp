#include "mrn/cli.hpp"

int main(int argc, char** argv) { return mrn::run_cli(argc, argv); }
