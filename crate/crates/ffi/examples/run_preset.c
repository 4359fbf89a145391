#include "meshsync.h"
#include <stdio.h>
int main(void) {
    MsRunSummary s;
    MsStatus st = ms_run_preset("demo-5node", 7, &s);
    printf("status %d deliveries %u nodes %u\n", st, s.deliveries, s.nodes_on);
    return st;
}
