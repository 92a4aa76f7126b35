#include "attripriors/cli.hpp"

int main(int argc, char** argv) { return attripriors::cli::run(argc, argv); }
