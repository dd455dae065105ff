#include <stdio.h>
#include <string.h>
char *data;
void printLine(const char *line)
{
    printf("%s\n", line);
}
int main()
{
    char dataBuffer[100];
    char source[100];
    int i;
    for (i = 0; i < 100 - 1; i++)
    {
        dataBuffer[i] = 'A';
    }
    dataBuffer[100-1] = '\0';
    data = dataBuffer + 8;
    memset(source, 'C', 92-1);
    source[92-1] = '\0';
    strncpy(data, source, 92-1);
    printLine(data);
    return 0;
}
