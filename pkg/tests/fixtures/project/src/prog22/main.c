#include <stdio.h>
#include <string.h>
char *data;
void printLine(const char *line)
{
    printf("%s\n", line);
}
int main()
{
    char dataBuffer[50];
    char source[50];
    int i;
    for (i = 0; i < 50 - 1; i++)
    {
        dataBuffer[i] = 'A';
    }
    dataBuffer[50-1] = '\0';
    data = dataBuffer - 4;
    memset(source, 'C', 50-1);
    source[50-1] = '\0';
    strncpy(data, source, 50-1);
    printLine(data);
    return 0;
}
