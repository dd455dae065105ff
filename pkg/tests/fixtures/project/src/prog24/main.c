#include <stdio.h>
#include <string.h>

void printLine(const char *line)
{
    printf("%s\n", line);
}
int main()
{
    char dataBuffer[50];
    char source[50];
    char *data;
    memset(dataBuffer, 'A', 50-1);
    dataBuffer[50-1] = '\0';
    data = dataBuffer - 8;
    memset(source, 'C', 50-1);
    source[50-1] = '\0';
    memcpy(data, source, 50*sizeof(char));
    printLine(data);
    return 0;
}
