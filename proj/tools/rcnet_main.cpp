#include "rcnet/cli.hpp"

int main(int argc, char** argv) { return rcnet::cli::run(argc, argv); }
