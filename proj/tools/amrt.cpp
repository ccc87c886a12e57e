#include "amrt/cli.hpp"

int main(int argc, char** argv) { return amrt::cli::run(argc, argv); }
