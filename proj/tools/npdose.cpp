#include "npdose_cli.hpp"

int
main(int argc, char** argv)
{
  return npdose::cli::run(argc, argv);
}
