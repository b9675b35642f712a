#include "isogcn/cli.hpp"

int main(int argc, char** argv) { return isogcn::cli::run(argc, argv); }
