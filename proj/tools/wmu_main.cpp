#include "wmu/cli.hpp"

int main(int argc, char** argv)
{
    return wmu::run_cli(argc, argv);
}
