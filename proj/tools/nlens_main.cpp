#include "nlens/cli.hpp"

int main(int argc, char** argv) { return nlens::cli::run(argc, argv); }
