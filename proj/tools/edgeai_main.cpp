#include "edgeai/cli.hpp"

int main(int argc, char** argv)
{
  return edgeai::cli::main(argc, argv);
}
