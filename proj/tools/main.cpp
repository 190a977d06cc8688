#include <iostream>

#include "segmenter/cli.hpp"

int main(int argc, char** argv) { return segmenter::run_cli(argc, argv, std::cout, std::cerr); }
