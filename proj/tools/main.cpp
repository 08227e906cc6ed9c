#include "modalign/cli.hpp"

int main(int argc, char** argv) { return modalign::run(argc, argv); }
