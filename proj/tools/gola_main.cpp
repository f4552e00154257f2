// Apache License, Version 2.0, refer to LICENSE.txt

#include "gola/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return gola::cli_main(argc, argv, std::cout, std::cerr); }
