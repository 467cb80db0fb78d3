#include <cstdio>

int main() {
    std::fputs("occtrack: no subcommands wired up yet\n", stderr);
    return 1;
}
