#include <iostream>

#include "evsearch/cli.hpp"

int main(int argc, char** argv) {
    return evsearch::run_cli(argc, argv, std::cout, std::cerr);
}
