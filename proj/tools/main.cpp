#include "prefopt/diagnostics.hpp"

int main(int argc, char** argv) { return prefopt::cli_main(argc, argv); }
