#include "qdetect/cli.hpp"

int main(int argc, char** argv) { return qdetect::cli::main(argc, argv); }
