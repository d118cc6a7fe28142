#include "cli.hpp"

int main(int argc, char** argv) { return drag::cli::dispatch(argc, argv); }
