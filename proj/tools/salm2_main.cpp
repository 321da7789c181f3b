#include "salm2/cli.hpp"

int main(int argc, char** argv) { return salm2::cli::run(argc, argv); }
