#include <iostream>

#include "bamnet/cli.hpp"

int main(int argc, char** argv) {
    return bamnet::cli_dispatch(argc, argv, std::cout, std::cerr);
}
