#include "cvid/cli.hpp"

int main(int argc, char** argv) { return cvid::cli::run(argc, argv); }
