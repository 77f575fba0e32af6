#include "gph2/cli.hpp"

int main(int argc, char** argv) { return gph2::cli::run(argc, argv); }
