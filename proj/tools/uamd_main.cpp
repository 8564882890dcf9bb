#include "uamd/cli.hpp"

int main(int argc, char** argv) { return uamd::cli_run(argc, argv); }
