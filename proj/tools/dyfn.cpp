#include "dyfn/cli.hpp"

int main(int argc, char** argv) { return dyfn::cli::run(argc, argv); }
