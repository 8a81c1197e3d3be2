#include "biomorph/cli.hpp"

int main(int argc, char** argv) { return biomorph::cli::run(argc, argv); }
