/*
 * Calls dgemm_/zgemm_ through ordinary dynamic linkage (link with -lblas)
 * and prints every result entry in hex-float form, one per line.
 *
 *   gemm_driver          run the fixed call list
 *   gemm_driver one      a single dgemm call
 *   gemm_driver bad      make one call with an illegal leading dimension and
 *                        exit 0 only if C was left untouched
 */
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

typedef struct { double re, im; } zdouble;

void dgemm_(const char *, const char *, const int *, const int *, const int *,
            const double *, const double *, const int *, const double *, const int *,
            const double *, double *, const int *);
void zgemm_(const char *, const char *, const int *, const int *, const int *,
            const zdouble *, const zdouble *, const int *, const zdouble *, const int *,
            const zdouble *, zdouble *, const int *);

static unsigned long long state = 88172645463325252ULL;

static double next_value(void)
{
    state ^= state << 13;
    state ^= state >> 7;
    state ^= state << 17;
    return (double)(state >> 11) / 9007199254740992.0 * 2.0 - 1.0;
}

static double *dfill(int count)
{
    double *x = malloc(sizeof(double) * (count > 0 ? count : 1));
    for (int i = 0; i < count; i++)
        x[i] = next_value();
    return x;
}

static zdouble *zfill(int count)
{
    zdouble *x = malloc(sizeof(zdouble) * (count > 0 ? count : 1));
    for (int i = 0; i < count; i++) {
        x[i].re = next_value();
        x[i].im = next_value();
    }
    return x;
}

static void drun(const char *ta, const char *tb, int m, int n, int k, double alpha,
                 double beta, int pad)
{
    int ra = *ta == 'N' ? m : k, ca = *ta == 'N' ? k : m;
    int rb = *tb == 'N' ? k : n, cb = *tb == 'N' ? n : k;
    int lda = ra + pad, ldb = rb + pad, ldc = m + pad;
    double *a = dfill(lda * ca), *b = dfill(ldb * cb), *c = dfill(ldc * n);
    dgemm_(ta, tb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc);
    printf("dgemm %s%s %d %d %d\n", ta, tb, m, n, k);
    for (int j = 0; j < n; j++)
        for (int i = 0; i < m; i++)
            printf("%a\n", c[i + j * ldc]);
    free(a), free(b), free(c);
}

static void zrun(const char *ta, const char *tb, int m, int n, int k, zdouble alpha,
                 zdouble beta, int pad)
{
    int ra = *ta == 'N' ? m : k, ca = *ta == 'N' ? k : m;
    int rb = *tb == 'N' ? k : n, cb = *tb == 'N' ? n : k;
    int lda = ra + pad, ldb = rb + pad, ldc = m + pad;
    zdouble *a = zfill(lda * ca), *b = zfill(ldb * cb), *c = zfill(ldc * n);
    zgemm_(ta, tb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc);
    printf("zgemm %s%s %d %d %d\n", ta, tb, m, n, k);
    for (int j = 0; j < n; j++)
        for (int i = 0; i < m; i++)
            printf("%a %a\n", c[i + j * ldc].re, c[i + j * ldc].im);
    free(a), free(b), free(c);
}

static int bad_call(void)
{
    int m = 3, n = 3, k = 3, lda = 2, ldb = 3, ldc = 3;
    double alpha = 1.0, beta = 0.0, a[9] = {0}, b[9] = {0}, c[9], before[9];
    for (int i = 0; i < 9; i++)
        c[i] = before[i] = i + 0.5;
    dgemm_("N", "N", &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc);
    return memcmp(c, before, sizeof c) != 0;
}

int main(int argc, char **argv)
{
    if (argc > 1 && strcmp(argv[1], "bad") == 0)
        return bad_call();
    if (argc > 1 && strcmp(argv[1], "one") == 0) {
        drun("N", "N", 8, 8, 8, 1.0, 0.0, 0);
        return 0;
    }
    zdouble za = {0.75, -0.5}, zb = {-0.25, 1.0}, one = {1.0, 0.0}, zero = {0.0, 0.0};
    drun("N", "N", 37, 29, 53, 1.5, -0.5, 3);
    drun("T", "N", 2, 2, 2, 1.0, 0.0, 0);
    drun("N", "T", 64, 64, 64, 1.0, 1.0, 0);
    drun("T", "T", 20, 31, 17, -2.0, 0.0, 5);
    zrun("N", "N", 33, 21, 47, za, zb, 2);
    zrun("C", "N", 16, 24, 40, one, zero, 0);
    zrun("N", "C", 25, 25, 25, za, one, 1);
    zrun("T", "T", 12, 9, 30, one, zb, 4);
    return 0;
}
