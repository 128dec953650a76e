#include <iostream>

#include "advaug/cli.hpp"

int main(int argc, char** argv) { return advaug::cli::run(argc, argv, std::cout, std::cerr); }
