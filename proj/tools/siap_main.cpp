#include "siap/cli.hpp"

int main(int argc, char** argv) { return siap::cli::run(argc, argv); }
