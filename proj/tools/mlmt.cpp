#include <iostream>

#include "mlmt/cli/app.hpp"

int main(int argc, char** argv)
{
    return mlmt::cli::run(argc, argv, std::cout, std::cerr);
}
