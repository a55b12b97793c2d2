#include "cli.hpp"

int main(int argc, char **argv) { return asmnet::cli::dispatch(argc, argv, {std::cout, std::cerr}); }
